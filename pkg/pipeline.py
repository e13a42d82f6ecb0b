import logging
import sys

# Import configuration variables
import config

from lesionsynth import cli

# Set up logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')


def main():
    """
    Entry point: `python pipeline.py <command> [--config PATH] [--seed N] [--out DIR] [--data DIR]`.
    """
    logging.info(f"--- lesionsynth (dataset env var {config.DATA_ENV_VAR}) ---")
    return cli.main()


if __name__ == "__main__":
    sys.exit(main())
