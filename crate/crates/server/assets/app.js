// Minimal client: routes by token role, renders items and the dashboard.
const token = new URLSearchParams(location.search).get("token");
const app = document.getElementById("app");

async function api(path, options = {}) {
  const sep = path.includes("?") ? "&" : "?";
  const res = await fetch(`/api/${path}${sep}token=${encodeURIComponent(token)}`, {
    headers: { "Content-Type": "application/json" },
    ...options,
  });
  const body = await res.json();
  if (!res.ok) throw new Error(body.error ? body.error.message : res.statusText);
  return body;
}

function el(tag, attrs = {}, ...children) {
  const node = document.createElement(tag);
  Object.assign(node, attrs);
  for (const c of children) node.append(c);
  return node;
}

function content(c) {
  if (typeof c === "string") return el("div", { textContent: c });
  if (c.kind === "audio") return el("audio", { src: c.value, controls: true });
  if (c.kind === "video") return el("video", { src: c.value, controls: true });
  return el("div", { innerHTML: c.value });
}

async function annotate(warnings = []) {
  const next = await api("next");
  app.replaceChildren();
  if (next.status === "complete") {
    app.append(el("h2", { textContent: "Thank you, all items are done." }),
      el("p", { textContent: `Completion code: ${next.token}` }));
    return;
  }
  const scores = {};
  app.append(el("p", { textContent: `Progress: ${next.progress.done} / ${next.progress.total}` }));
  if (next.instructions) app.append(el("p", { textContent: next.instructions }));
  for (const w of warnings) app.append(el("div", { className: "warning", textContent: w }));
  next.segments.forEach((seg, i) => {
    app.append(el("div", { className: "src" }, content(seg.src)));
    const row = el("div", { className: "outputs" });
    for (const alias of next.outputs) {
      scores[alias] = scores[alias] || [];
      const slider = el("input", { type: "range", min: 0, max: 100, value: 50 });
      scores[alias][i] = slider;
      const anchors = next.sliders[0].anchors.map(a => `${a.value}: ${a.label}`).join(" · ");
      row.append(el("div", { className: "output" }, content(seg.tgt[alias]), slider,
        el("label", { className: "anchor", textContent: anchors })));
    }
    app.append(row);
  });
  const comment = el("textarea", { placeholder: "Comment (optional)" });
  const submit = el("button", { textContent: "Submit" });
  const send = async (skip) => {
    const annotations = {};
    for (const alias of next.outputs) {
      annotations[alias] = {
        segments: scores[alias].map(s => ({ score: Number(s.value) })),
        comment: comment.value || null,
        actions: [],
      };
    }
    const out = await api("submit", {
      method: "POST",
      body: JSON.stringify({ document_index: next.document_index, annotations, skip_tutorial: skip }),
    });
    if (out.status === "blocked") {
      await annotate(out.warnings);
      if (out.can_skip) app.append(el("button", { textContent: "Skip tutorial", onclick: () => send(true) }));
    } else {
      await annotate();
    }
  };
  submit.onclick = () => send(false).catch(e => alert(e.message));
  app.append(comment, submit);
}

async function dashboard() {
  const d = await api("dashboard");
  app.replaceChildren(el("h2", { textContent: `Campaign ${d.campaign_id}` }),
    el("p", { textContent: `${d.progress.done} / ${d.progress.total} done` }));
  if (d.disclaimer) app.append(el("p", { className: "warning", textContent: d.disclaimer }));
  const table = el("table");
  table.append(el("tr", {}, ...["user", "done", "total", "s/item", "attention"].map(h => el("th", { textContent: h }))));
  for (const u of d.users) {
    const rate = u.attention_pass_rate == null ? "–" : `${Math.round(100 * u.attention_pass_rate)}%`;
    const secs = u.seconds_per_item == null ? "–" : u.seconds_per_item.toFixed(1);
    table.append(el("tr", {}, ...[u.user_id, u.done, u.total, secs, rate].map(v => el("td", { textContent: v }))));
  }
  const results = el("div");
  const show = el("button", { textContent: "Show results" });
  show.onclick = async () => {
    const r = await api("results", { method: "POST" });
    const t = el("table");
    r.ranking.rows.forEach((row, i) => {
      const tr = el("tr", {}, el("td", { textContent: row.model_id }), el("td", { textContent: row.mean.toFixed(1) }));
      if (r.ranking.separations.includes(i - 1)) tr.className = "separated";
      t.append(tr);
    });
    results.replaceChildren(t);
  };
  const exportLink = el("a", { href: `/api/export?token=${encodeURIComponent(token)}`, textContent: "Download annotations" });
  app.append(table, show, results, el("p", {}, exportLink));
}

(async () => {
  if (!token) { app.textContent = "Open this page through your personal link."; return; }
  try {
    const s = await api("session");
    await (s.role === "manager" ? dashboard() : annotate());
  } catch (e) {
    app.textContent = e.message;
  }
})();
