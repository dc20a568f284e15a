use pyepfde::pyepfde;
use pyo3::ffi::c_str;
use pyo3::prelude::*;

#[test]
fn module_imports_and_runs() {
    pyo3::append_to_inittab!(pyepfde);
    Python::initialize();
    Python::attach(|py| {
        py.run(
            c_str!(
                r#"
import pyepfde
c = pyepfde.Constellation("qam16")
assert c.bits_per_symbol == 4
bits = [1, 0, 1, 1, 0, 0, 1, 0]
assert c.hard_demap(c.map_bits(bits)) == bits
code = pyepfde.Code("17,13", info_len=8)
ext, hard = code.decode([10.0 * (1 - 2 * b) for b in code.encode([1, 0] * 4)])
assert hard == [1, 0] * 4 and len(ext) == code.coded_len
try:
    pyepfde.Constellation("qam32")
    raise AssertionError("expected ValueError")
except ValueError:
    pass
"#
            ),
            None,
            None,
        )
        .unwrap();
    });
}
