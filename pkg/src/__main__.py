import sys

from src.app import main

sys.exit(main())
