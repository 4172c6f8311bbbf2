#!/usr/bin/env python
"""
Entry point script for the CMixer workbench
Run this script with a command: python run.py info
"""

import sys
from pathlib import Path

# Add project root to Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from cmixer_workbench.main import run_cli

if __name__ == "__main__":
    try:
        sys.exit(run_cli())
    except KeyboardInterrupt:
        print("\nerror: runtime: interrupted", file=sys.stderr)
        sys.exit(1)
