"""Quick end-to-end check of the pyepfde extension module.

Build and install first:
    pip install --no-build-isolation -e crates/python
"""

import math

import pyepfde


def main():
    c = pyepfde.Constellation("psk8")
    assert c.bits_per_symbol == 3
    power = sum(abs(p) ** 2 for p in c.points) / len(c.points)
    assert abs(power - 1.0) < 1e-12

    k = 256
    code = pyepfde.Code("1,5/7", info_len=k * 3 // 2 - 2)
    assert code.coded_len == k * 3
    pi = pyepfde.Interleaver(code.coded_len, seed=7)

    info = [(i * 7 + i // 3) % 2 for i in range(code.info_len)]
    coded = code.encode(info)
    x = c.map_bits([int(b) for b in pi.interleave(coded)])

    noise = pyepfde.noise_variance(16.0, c.bits_per_symbol, code.rate)
    ch = pyepfde.Channel.preset("proakis_c", k, noise)
    y = ch.apply(x, seed=1)
    decisions = pyepfde.run_receiver(
        y, ch, c, code, pi, mode="ep", self_iterations=3, turbo_iterations=2, damping=0.7
    )
    errors = sum(a != b for a, b in zip(decisions[-1], info))
    print(f"Proakis C, 8-PSK, 16 dB: {errors} info bit errors after {len(decisions) - 1} turbo iterations")
    assert errors == 0

    rows = pyepfde.run_experiment(
        """
        kind = "sc_fde"
        seed = 3
        block_len = 1024
        constellation = "qpsk"
        [channel]
        preset = "identity"
        [receiver]
        mode = "ext"
        [sim]
        ebn0_db = [4.0]
        max_blocks = 50
        """
    )
    ref = 0.5 * math.erfc(math.sqrt(10 ** 0.4))
    print(f"QPSK AWGN 4 dB: BER {rows[0]['ber']:.4e} (theory {ref:.4e})")
    assert abs(rows[0]["ber"] - ref) < 0.2 * ref

    assert abs(pyepfde.j_inverse(pyepfde.j_function(1.3)) - 1.3) < 1e-2
    print("ok")


if __name__ == "__main__":
    main()
