import logging
import sys

from dotenv import load_dotenv

from src.app.config import load_env_settings, parse_config
from src.handlers.commands import run
from src.models.errors import NumericalError, ValidationError


def main(argv: list[str] | None = None) -> int:
    # .env values must be in os.environ before the settings are read.
    load_dotenv()
    try:
        env = load_env_settings()
        config = parse_config(sys.argv[1:] if argv is None else argv, env=env)
    except ValidationError as exc:
        print(f"seedbank: {exc}", file=sys.stderr)
        return 2

    level = logging.DEBUG if config.verbose else getattr(logging, env.log_level)
    logging.basicConfig(level=level, format="%(name)s | %(message)s")
    log = logging.getLogger(__name__)
    log.info("Running %s (model=%s, seed=%d)", config.command, config.model, config.seed)

    try:
        return run(config)
    except ValidationError as exc:
        print(f"seedbank {config.command}: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"seedbank {config.command}: numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
