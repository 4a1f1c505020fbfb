"""Run the deeper-fcdd command line."""
import sys

from deeper_fcdd.cli import main

sys.exit(main())
