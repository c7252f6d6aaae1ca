"""``python -m seriescomp.cosim`` starts a device controller process."""
import sys

from .controller import main

sys.exit(main())
