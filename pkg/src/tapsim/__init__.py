"""tapsim: a desk-scale contactless payment protocol sandbox.

Models two EMV-style kernels, mag-stripe mode, mobile wallets, a
man-in-the-middle adversary and an issuer back end, then checks which
security properties each run upholds. Every known weakness is a
configuration toggle, so attacks and their fixes can both be demonstrated.
"""

__version__ = "0.1.0"
