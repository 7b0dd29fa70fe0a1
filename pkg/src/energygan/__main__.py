import sys

from energygan.cli import main

sys.exit(main())
