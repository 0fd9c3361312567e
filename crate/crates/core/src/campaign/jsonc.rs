//! Relaxed JSON input: campaign files are commonly written by hand with
//! `//` comments, `/* */` blocks and trailing commas. This pass blanks those
//! out (byte-for-byte, newlines kept) so a strict JSON parser sees a valid
//! document and still reports the original line and column on errors.

/// Returns `input` with comments and trailing commas replaced by spaces.
pub fn strip(input: &str) -> String {
    let src = input.as_bytes();
    let mut out = src.to_vec();
    let mut i = 0;
    let mut in_string = false;
    let mut pending_comma: Option<usize> = None;

    while i < src.len() {
        let b = src[i];
        if in_string {
            match b {
                b'\\' => i += 1,
                b'"' => in_string = false,
                _ => {}
            }
            i += 1;
            continue;
        }
        match b {
            b'"' => {
                pending_comma = None;
                in_string = true;
            }
            b'/' if src.get(i + 1) == Some(&b'/') => {
                while i < src.len() && src[i] != b'\n' {
                    out[i] = b' ';
                    i += 1;
                }
                continue;
            }
            b'/' if src.get(i + 1) == Some(&b'*') => {
                let start = i;
                i += 2;
                while i < src.len() && !(src[i] == b'*' && src.get(i + 1) == Some(&b'/')) {
                    i += 1;
                }
                // An unterminated block comment runs to the end of input.
                let end = (i + 2).min(src.len());
                for slot in &mut out[start..end] {
                    if *slot != b'\n' {
                        *slot = b' ';
                    }
                }
                i = end;
                continue;
            }
            b',' => pending_comma = Some(i),
            b'}' | b']' => {
                if let Some(at) = pending_comma.take() {
                    out[at] = b' ';
                }
            }
            b' ' | b'\t' | b'\r' | b'\n' => {}
            _ => pending_comma = None,
        }
        i += 1;
    }

    // Only ASCII bytes were overwritten, and whole multi-byte sequences inside
    // comments were blanked together, so the buffer is still valid UTF-8.
    String::from_utf8(out).expect("blanking preserves UTF-8")
}
