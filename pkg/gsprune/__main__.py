from .main import gsprune_cli

gsprune_cli()
