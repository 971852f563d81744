from __future__ import annotations

from kbonacci import create_app


def main() -> None:
    app = create_app()
    with app.app_context():
        app.cli.main(prog_name="kbonacci")


if __name__ == "__main__":
    main()
