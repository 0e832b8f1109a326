"""
acbound command line entry point
================================

Equivalent to the ``acbound`` console script and to ``python -m acbound``:

- family build|verify: lower-bound family construction and checks
- ac run|fit: accuracy-confidence Monte Carlo experiments and exponent fits
- oracle fano|fixedpoint|net-entropy: brute-force checks of the bounds
"""

import sys

from acbound.cli import main

if __name__ == "__main__":
    sys.exit(main())
