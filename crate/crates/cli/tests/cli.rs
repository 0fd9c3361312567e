use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use regex::Regex;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn pearmut(data_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pearmut"))
        .args(args)
        .arg("--data-dir")
        .arg(data_dir)
        .env_remove("PEARMUT_PORT")
        .env_remove("PEARMUT_HOST")
        .env("PEARMUT_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn mask(text: &str) -> String {
    let user = Regex::new(r"\t[a-z]+-[a-z]+-\d{3}\t").unwrap();
    let token = Regex::new(r"token=[A-Za-z0-9_-]{16}$").unwrap();
    text.lines()
        .map(|l| {
            let l = user.replace(l, "\t<user>\t");
            token.replace(&l, "token=<token>").into_owned()
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

fn golden(name: &str, actual: &str) {
    let path = fixture(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    assert_eq!(actual, std::fs::read_to_string(&path).unwrap(), "golden {name}");
}

#[test]
fn add_prints_links_then_rejects_duplicate() {
    let dir = tempfile::tempdir().unwrap();
    let file = fixture("esa_single_stream.jsonc");
    let first = pearmut(dir.path(), &["add", file.to_str().unwrap()]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    golden("add_esa_single_stream.golden", &mask(&stdout(&first)));

    let second = pearmut(dir.path(), &["add", file.to_str().unwrap()]);
    assert!(!second.status.success());
    assert!(String::from_utf8_lossy(&second.stderr).contains("already exists"));
    assert!(stdout(&second).is_empty());
}

#[test]
fn add_uses_host_and_port() {
    let dir = tempfile::tempdir().unwrap();
    let file = fixture("esa_single_stream.jsonc");
    let out = Command::new(env!("CARGO_BIN_EXE_pearmut"))
        .args(["add", file.to_str().unwrap(), "--data-dir"])
        .arg(dir.path())
        .env("PEARMUT_HOST", "eval.example.org")
        .env("PEARMUT_PORT", "9001")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(stdout(&out)
        .lines()
        .all(|l| l.contains("\thttp://eval.example.org:9001/?token=")));
}

#[test]
fn malformed_file_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"info\": {\"assignment\": \"single-stream\",\n  \"protocol\": \"XYZ\", \"users\": 2},\n \"campaign_id\": \"x\", \"data\": []}").unwrap();
    let data = dir.path().join("data");
    let out = pearmut(&data, &["add", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("info.protocol"), "{err}");
    assert!(stdout(&out).is_empty());
    let logs: Vec<_> = std::fs::read_dir(&data)
        .map(|d| d.filter_map(Result::ok).collect())
        .unwrap_or_default();
    assert!(logs.is_empty(), "{logs:?}");
    let list = pearmut(&data, &["list"]);
    assert_eq!(stdout(&list).lines().count(), 1);
}

#[test]
fn list_shows_campaigns() {
    let dir = tempfile::tempdir().unwrap();
    let empty = pearmut(dir.path(), &["list"]);
    assert!(empty.status.success());
    assert_eq!(
        stdout(&empty),
        "campaign\tassignment\tprotocol\tannotators\tdocuments\tdone\ttotal\tpercent\n"
    );
    let file = fixture("esa_single_stream.jsonc");
    assert!(pearmut(dir.path(), &["add", file.to_str().unwrap()]).status.success());
    golden("list_fresh.golden", &stdout(&pearmut(dir.path(), &["list"])));
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start(data_dir: &Path) -> (Server, String, Vec<String>) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_pearmut"))
        .args(["run", "--port", "0", "--data-dir"])
        .arg(data_dir)
        .env("PEARMUT_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let first = lines.next().unwrap().unwrap();
    let base = first.strip_prefix("listening\t").unwrap().to_string();
    let campaigns = std::fs::read_dir(data_dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "log"))
        .count();
    let dashboards = (0..campaigns).map(|_| lines.next().unwrap().unwrap()).collect();
    (Server(child), base, dashboards)
}

#[test]
fn run_serves_links_from_add() {
    let dir = tempfile::tempdir().unwrap();
    let file = fixture("esa_single_stream.jsonc");
    let added = stdout(&pearmut(dir.path(), &["add", file.to_str().unwrap()]));
    let token = added.lines().next().unwrap().rsplit("token=").next().unwrap().to_string();

    let (server, base, dashboards) = start(dir.path());
    assert_eq!(dashboards.len(), 1);
    assert!(dashboards[0].starts_with("dashboard\tmy_first_campaign\thttp://127.0.0.1:"));
    let client = reqwest::blocking::Client::new();
    let health: serde_json::Value = client.get(format!("{base}/healthz")).send().unwrap().json().unwrap();
    assert_eq!(health["campaigns"], 1);
    let next = client
        .get(format!("{base}/api/next?token={token}"))
        .send()
        .unwrap();
    assert_eq!(next.status(), 200);
    assert_eq!(next.headers()["cache-control"], "no-store");
    let body: serde_json::Value = next.json().unwrap();
    assert_eq!(body["status"], "item");

    // A second writer on the same data directory is refused.
    let clash = pearmut(dir.path(), &["add", fixture("esa_single_stream.jsonc").to_str().unwrap()]);
    assert!(!clash.status.success());
    assert!(String::from_utf8_lossy(&clash.stderr).contains("locked"));
    drop(server);
}

#[test]
fn run_on_empty_dir_serves_static_page() {
    let dir = tempfile::tempdir().unwrap();
    let (_server, base, dashboards) = start(dir.path());
    assert!(dashboards.is_empty());
    let client = reqwest::blocking::Client::new();
    let page = client.get(format!("{base}/")).send().unwrap();
    assert_eq!(page.status(), 200);
    assert!(page.text().unwrap().contains("<main id=\"app\">"));
}

#[test]
fn run_refuses_corrupt_log() {
    let dir = tempfile::tempdir().unwrap();
    let file = fixture("esa_single_stream.jsonc");
    let added = stdout(&pearmut(dir.path(), &["add", file.to_str().unwrap()]));
    assert!(!added.is_empty());
    let path = dir.path().join("my_first_campaign.log");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[12] ^= 0x01;
    std::fs::write(&path, bytes).unwrap();
    let out = pearmut(dir.path(), &["run", "--port", "0"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("record 1"), "{err}");
}
