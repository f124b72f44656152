#![no_main]
use libfuzzer_sys::fuzz_target;
use symplift::system_file::parse_system_file;

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else { return };
    if let Err(e) = parse_system_file(src) {
        assert!(e.line >= 1 && e.column >= 1, "{e}");
    }
});
