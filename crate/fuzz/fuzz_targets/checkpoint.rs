#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // must never panic or over-allocate on arbitrary bytes
    let _ = detour::io::load_checkpoint(data);
});
