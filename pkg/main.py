import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "backend"))

from cli import run  # noqa: E402


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
