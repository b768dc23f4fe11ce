from soatest.cli import entry_point

entry_point()
