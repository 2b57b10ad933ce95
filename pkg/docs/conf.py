# Configuration file for the Sphinx documentation builder.

# -- Project information -----------------------------------------------------

project = u'metapatch'
copyright = u'2026, metapatch developers'
author = u'metapatch developers'

# The full version, including alpha/beta/rc tags
release = u'0.1'

# -- General configuration ---------------------------------------------------

extensions = [
    "sphinx_rtd_theme",
]

master_doc = 'index'
exclude_patterns = [u'_build', 'Thumbs.db', '.DS_Store']

# -- Options for HTML output -------------------------------------------------

html_theme = 'sphinx_rtd_theme'
htmlhelp_basename = 'metapatchdoc'
