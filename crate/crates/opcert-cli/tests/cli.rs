//! Process-level behavior of the binary that in-process unit tests cannot
//! cover.

use std::io::Read;
use std::process::{Command, Stdio};

/// A consumer like `head` closes the pipe early; the run must truncate its
/// output and exit by its computed code instead of crashing.
#[test]
fn broken_pipe_truncates_output_without_crashing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.json");
    // large enough that the pretty JSON overflows an OS pipe buffer
    let dim = 60;
    let entries: Vec<Vec<[f64; 2]>> = (0..dim)
        .map(|i| {
            (0..dim)
                .map(|j| {
                    if i == j {
                        [1.0 + i as f64, 0.0]
                    } else {
                        [0.0, 0.0]
                    }
                })
                .collect()
        })
        .collect();
    let matrix = serde_json::json!({ "dim": dim, "entries": entries });
    std::fs::write(&path, serde_json::to_string(&matrix).unwrap()).unwrap();

    let inputs = format!("{},{}", path.display(), path.display());
    let mut child = Command::new(env!("CARGO_BIN_EXE_opcert"))
        .args(["eval", "--map", "THM2.1", "--p", "1", "--inputs", &inputs])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();

    // the full output cannot fit in the pipe, so the writer is still mid
    // stream when the read end closes
    let mut stdout = child.stdout.take().unwrap();
    let mut byte = [0u8; 1];
    stdout.read_exact(&mut byte).unwrap();
    drop(stdout);

    let status = child.wait().unwrap();
    let mut stderr = String::new();
    child
        .stderr
        .take()
        .unwrap()
        .read_to_string(&mut stderr)
        .unwrap();
    assert!(status.success(), "exit {status:?}, stderr: {stderr}");
    assert!(!stderr.contains("panic"), "stderr: {stderr}");
}
