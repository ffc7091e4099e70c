"""Module entry point so ``python -m cadet`` reaches the command line."""

from .cli import main

main()
