#!/usr/bin/env python3
"""
Noisy-label lab launcher

Runs the nlab command line without installing the package, e.g.

    python run_nlab.py run --config experiments/glyphs.ini --strategy dividemix-WS-WAW
"""

import sys
import os

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.client.terminal import main

if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\nStopped by user")
        sys.exit(130)
