"""
A tour of the kernels
=====================

Build higher-order kernels from a base kernel, check their moments and
norms, and see how scaling and convolution act on them.
"""

import numpy as np

from kdeselect import ProductKernel, build_higher_order, get_base_kernel, moment

# The triangular base kernel lives on [-1/2, 1/2] and integrates to one.
u = get_base_kernel("triangular")
print("triangular u(0) =", u(0.0), " radius =", u.radius)

# Order-l kernels cancel the moments j = 1..l-1 while keeping unit mass.
for l in (1, 2, 3):
    k = build_higher_order(u, l)
    moments = [moment(k, j) for j in range(l + 1)]
    print(f"l={l}: radius {k.radius:.1f}, moments", np.round(moments, 12))

# Product kernels in d dimensions; norms follow V_h^(1/s - 1) ||K||_s.
K = ProductKernel.from_name("biweight", 2, 2)
h = (0.3, 0.1)
for s in (1.0, 2.0, 3.0):
    scaled = K.scaled(h).norm(s)
    law = np.prod(h) ** (1 / s - 1) * K.norm(s)
    print(f"s={s:g}: ||K_h||_s = {scaled:.6f}, scaling law {law:.6f}")

# K_h * K_eta is again a piecewise polynomial, computed exactly.
K1 = ProductKernel.from_name("triangular", 1, 1)
c = K1.convolved(0.5, 0.2)
print("(K_0.5 * K_0.2)(0) =", float(c(np.zeros(1))), " support radius", c.radii[0])
print("Young: ||K_h * K_eta||_2 <=", K1.scaled(0.5).norm(2.0) * K1.scaled(0.2).norm(1.0),
      " actual", c.norm(2.0))
