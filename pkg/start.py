#!/usr/bin/env python3
"""
Entry point for the BNBCP tensor factorization tool.

    python start.py fit --input data.tns --method gibbs --rank 15
    python start.py --help
"""

import sys
import os

# Add current directory to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))


def check_dependencies():
    """Check if required packages are installed"""
    required_packages = [
        'numpy',
        'scipy',
        'pandas',
        'plotly'
    ]

    missing = []
    for package in required_packages:
        try:
            __import__(package)
        except ImportError:
            missing.append(package)

    if missing:
        print(f"❌ Missing packages: {', '.join(missing)}", file=sys.stderr)
        print("\nInstall them with:", file=sys.stderr)
        print("  pip install -r requirements.txt", file=sys.stderr)
        return False

    return True


def main():
    """Main entry point"""
    if not check_dependencies():
        sys.exit(1)

    from bnbcp.cli import main as cli_main
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
