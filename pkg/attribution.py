"""
Counterfactual Attribution - command-line entry point.

    python attribution.py generate
    python attribution.py train classifier
    python attribution.py evaluate --out runs/demo
"""

import sys
from pathlib import Path

# Add src directory to path
sys.path.append(str(Path(__file__).parent))

from src.app.cli import main

if __name__ == "__main__":
    sys.exit(main())
