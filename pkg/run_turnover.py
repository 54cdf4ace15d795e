#!/usr/bin/env python3
"""
Run script for turnover-forest
"""

import os
import sys

# Add current directory to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from main import main

if __name__ == '__main__':
    print(f"Running turnover-forest {' '.join(sys.argv[1:]) or '--help'}...", file=sys.stderr)
    sys.exit(main(sys.argv[1:] or ["--help"]))
