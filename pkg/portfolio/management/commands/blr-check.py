from .blr_check import Command as BlrCheckCommand


class Command(BlrCheckCommand):
    """`blr-check`: the hyphenated name of `blr_check`."""
    subcommand = 'blr-check'
