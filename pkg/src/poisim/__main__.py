"""Allow `python -m poisim`."""

from .cli import main

if __name__ == "__main__":
    main()
