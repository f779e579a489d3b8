import sys

from gaze_glass.cli import main


if __name__ == '__main__':
    sys.exit(main())
