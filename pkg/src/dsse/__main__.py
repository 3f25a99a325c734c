from dsse.harness.cli import main
import sys

sys.exit(main())
