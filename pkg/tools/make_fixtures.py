"""Regenerate the bundled Touchstone fixtures in src/invivo_mimo/data/.

The files are smooth, reciprocal stand-ins for a field-solver export (1-3 GHz,
50 MHz step), written in MA format the way field solvers usually emit them.
"""
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "invivo_mimo" / "data"
FREQS = np.linspace(1e9, 3e9, 41)


def _trace(level_db, delay_ns, phase0, ripple_db=1.5):
    f = FREQS / 1e9
    mag_db = level_db - 6.0 * (f - 2.4) ** 2 + ripple_db * np.sin(2 * np.pi * f / 0.7 + phase0)
    return 10 ** (mag_db / 20) * np.exp(-1j * (2 * np.pi * FREQS * delay_ns * 1e-9 + phase0))


def four_port():
    s = np.zeros((FREQS.size, 4, 4), dtype=complex)
    for p, lvl in enumerate((-12.0, -11.0, -15.0, -14.0)):
        s[:, p, p] = _trace(lvl, 0.3, 0.4 * p, 2.0)
    s[:, 0, 1] = s[:, 1, 0] = _trace(-24.0, 0.9, 0.7)    # in-vivo pair coupling
    s[:, 2, 3] = s[:, 3, 2] = _trace(-30.0, 0.5, 1.9)    # ex-vivo pair coupling
    s[:, 2, 0] = s[:, 0, 2] = _trace(-52.0, 2.1, 0.2)    # S31
    s[:, 2, 1] = s[:, 1, 2] = _trace(-58.0, 2.6, 1.3)    # S32
    s[:, 3, 0] = s[:, 0, 3] = _trace(-57.0, 2.4, 2.8)    # S41
    s[:, 3, 1] = s[:, 1, 3] = _trace(-53.0, 2.2, 0.9)    # S42
    return s


def write_ma(path, s, header):
    n = s.shape[1]
    lines = [f"! {h}" for h in header] + ["# GHz S MA R 50"]
    for f, mat in zip(FREQS, s):
        if n == 2:
            mat = mat.T
        pairs = [f"{abs(v):.6e} {np.degrees(np.angle(v)):.4f}" for v in mat.reshape(-1)]
        if n == 2:
            lines.append(f"{f / 1e9:.3f} " + " ".join(pairs))
        else:
            for r in range(n):
                prefix = f"{f / 1e9:.3f} " if r == 0 else "      "
                lines.append(prefix + " ".join(pairs[r * n:(r + 1) * n]))
    path.write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    s4 = four_port()
    write_ma(OUT / "invivo_2x2.s4p", s4,
             ["Synthetic 4-port in-vivo fixture: ports 1-2 in vivo (TX), ports 3-4 ex vivo (RX)"])
    s2 = s4[:, [0, 2]][:, :, [0, 2]]
    write_ma(OUT / "invivo_siso.s2p", s2,
             ["Synthetic 2-port in-vivo fixture: port 1 in vivo (TX), port 2 ex vivo (RX)"])
