"""Entry point for: python -m robust_bundle_adjust"""

from robust_bundle_adjust.cli import main

if __name__ in {"__main__", "__mp_main__"}:
    raise SystemExit(main())
