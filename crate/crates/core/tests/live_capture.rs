//! Capture of a real child process through /proc.
#![cfg(target_os = "linux")]

use std::process::{Command, Stdio};
use std::time::Duration;

use privmem::acquisition::{capture_live, AcquisitionError, ImageSource};
use privmem::carving::{carve, Encoding};

#[test]
fn captures_marker_from_child_environment() {
    let marker = "PRIVMEM_LIVE_MARKER_convoy_7319";
    let mut child = Command::new("sleep")
        .arg("30")
        .env("PRIVMEM_TEST", marker)
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    std::thread::sleep(Duration::from_millis(100));
    let result = capture_live(child.id());
    let _ = child.kill();
    let _ = child.wait();
    match result {
        Ok(image) => {
            assert_eq!(image.pid(), child.id());
            assert_eq!(image.source(), ImageSource::Live);
            assert!(image.verify());
            let found = carve(&image, 8)
                .iter()
                .any(|s| s.encoding == Encoding::Ascii && s.text.contains(marker));
            assert!(found, "marker not found in {} captured bytes", image.len());
        }
        // ptrace restrictions in some sandboxes
        Err(AcquisitionError::PermissionDenied(_)) => {}
        Err(e) => panic!("unexpected capture error: {e}"),
    }
}

#[test]
fn vanished_process_is_reported() {
    let mut child = Command::new("true").spawn().unwrap();
    let pid = child.id();
    child.wait().unwrap();
    assert!(matches!(
        capture_live(pid),
        Err(AcquisitionError::NoSuchProcess(_))
    ));
}
