"""Console-script entry point for ``scaf``."""

import sys
from typing import List, Optional

from scaf.main import main as run_scaf


def main(argv: Optional[List[str]] = None) -> int:
    """Run one scaf command and return its exit code (0 success, 1 error)."""
    return run_scaf(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
