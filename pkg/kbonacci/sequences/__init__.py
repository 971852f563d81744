from flask import Blueprint

# cli_group=None puts the commands at the top level of the app CLI.
sequences_bp = Blueprint("sequences", __name__, cli_group=None)

from kbonacci.sequences import commands  # noqa: E402,F401
