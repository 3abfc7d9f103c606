"""
Entry point for the billiard_lab command line
Usage: python main.py <command> (--scene FILE | --preset NAME) [options]
"""
import sys

from billiard_lab.cli import main

if __name__ == "__main__":
    sys.exit(main())
