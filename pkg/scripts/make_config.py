"""Write the default run configuration to a file as a starting point.

    python3 scripts/make_config.py run.ini [section.key=value ...]
"""
import sys

from depthlayers import config


def main():
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    cfg = config.loads("", sys.argv[2:])
    with open(sys.argv[1], "w", encoding="utf-8") as fh:
        fh.write(config.dumps(cfg))


if __name__ == "__main__":
    main()
