#!/usr/bin/env python
"""Rate-In command-line utility for training, rate adaptation, MC runs and experiments."""
import sys


def main():
    """Dispatch to the rate_in click command group."""
    try:
        from rate_in.cli import cli
    except ImportError as exc:
        raise ImportError(
            "Couldn't import rate_in. Are its requirements installed "
            "(pip install -r requirements.txt) and is this directory on "
            "your PYTHONPATH?"
        ) from exc
    cli(args=sys.argv[1:], prog_name="manage.py")


if __name__ == '__main__':
    main()
