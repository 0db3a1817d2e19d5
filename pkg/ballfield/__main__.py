"""
Main entry point for ballfield.
"""

from .cli import BallFieldCLI


def main():
    """Main entry point."""
    # Initialize CLI
    cli = BallFieldCLI()

    # Run CLI
    cli.run()


if __name__ == "__main__":
    main()
