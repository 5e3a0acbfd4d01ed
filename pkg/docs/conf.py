# haarboost documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir.

import os
import sys

# Make the package importable for autodoc without installing it.
sys.path.insert(0, os.path.abspath('..'))

from haarboost import __version__  # noqa: E402


# -- General configuration ------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.napoleon',
]

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'haarboost'
copyright = '2026, the haarboost developers'
author = 'the haarboost developers'

version = __version__
release = __version__

exclude_patterns = ['_build']
pygments_style = 'sphinx'

# Google style docstrings only.
napoleon_numpy_docstring = False

# -- Options for HTML output ----------------------------------------------

html_theme = 'alabaster'
html_static_path = ['_static']
htmlhelp_basename = 'haarboostdoc'

# -- Options for manual page output ---------------------------------------

man_pages = [
    (master_doc, 'haarboost', 'haarboost Documentation', [author], 1)
]
