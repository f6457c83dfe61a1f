"""Run the solver CLI locally.

Loads a local ``.env`` (if present) so settings such as LOG_LEVEL or
HISTORY_DB_PATH can live there, then hands the command line to ``cli.main``.

Usage:
    pip install -r requirements.txt
    python run_local.py solve --config data/fixtures/case-study-1.json --out output/cs1
"""
import sys

from dotenv import load_dotenv

# Pick up a local .env if the developer created one (does not override existing vars).
load_dotenv()

import cli

if __name__ == "__main__":
    sys.exit(cli.main())
