# Configuration file for the Sphinx documentation builder.
#
# https://www.sphinx-doc.org/en/master/usage/configuration.html

import datetime
from importlib.metadata import PackageNotFoundError, version
from typing import List

master_doc = "index"

# -- Project information -----------------------------------------------------
project = "chaoscast"
year = datetime.datetime.now(tz=datetime.timezone.utc).year
author = "chaoscast developers"
copyright = f"{year}, {author}"

try:
    release = version(project)
except PackageNotFoundError:
    release = "unknown"


# -- General configuration ---------------------------------------------------
extensions = ["sphinx.ext.autodoc"]
templates_path = ["_templates"]
exclude_patterns: List[str] = []


# -- Options for HTML output -------------------------------------------------
html_theme = "alabaster"
