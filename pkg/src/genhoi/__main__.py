"""Entry point for python -m genhoi"""

from genhoi.cli import app

if __name__ == "__main__":
    app()
