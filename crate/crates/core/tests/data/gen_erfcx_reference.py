"""Regenerate erfcx_reference.csv with mpmath at 50 significant digits.

Grid: 50 x 50 points, Re z and Im z each linspace(-10, 10, 50).
Columns: re_z, im_z, re_erfcx, im_erfcx (shortest round-trip decimal).
"""
import mpmath

mpmath.mp.dps = 50
N = 50
pts = [-10 + 20 * mpmath.mpf(i) / (N - 1) for i in range(N)]

with open("erfcx_reference.csv", "w") as fh:
    fh.write("re_z,im_z,re_erfcx,im_erfcx\n")
    for x in pts:
        for y in pts:
            xf, yf = float(x), float(y)
            z = mpmath.mpc(xf, yf)  # evaluate at the exact double argument
            v = mpmath.exp(z * z) * mpmath.erfc(z)
            fh.write(f"{xf!r},{yf!r},{float(v.real)!r},{float(v.imag)!r}\n")
