# Configuration file for the Sphinx documentation builder.
#
# This file does only contain a selection of the most common options. For a
# full list see the documentation:
# http://www.sphinx-doc.org/en/master/config

# -- Path setup --------------------------------------------------------------

import os
import sys
sys.path.insert(0, os.path.abspath('../../'))

from posetrack import __version__  # noqa

# -- Project information -----------------------------------------------------

project = 'posetrack'
copyright = '2026, posetrack developers'
author = ''

# The short X.Y version
version = ".".join(__version__.split('.')[:-1])
# The full version, including alpha/beta/rc tags
release = __version__

# -- General configuration ---------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.intersphinx',
    'sphinx.ext.mathjax',
    'sphinx.ext.viewcode',
    'numpydoc',
    'nbsphinx'
]

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'
language = 'en'
exclude_patterns = ['_build', '**.ipynb_checkpoints']
pygments_style = 'sphinx'

# torch is heavy to install on documentation builders
autodoc_mock_imports = ['torch']

# -- Options for HTML output -------------------------------------------------

html_theme = 'sphinx_rtd_theme'
html_static_path = ['_static']
html_extra_path = ['schemas']
htmlhelp_basename = 'posetrackdoc'

# -- Options for LaTeX output ------------------------------------------------

latex_documents = [
    (master_doc, 'posetrack.tex', 'posetrack Documentation',
     'posetrack developers', 'manual'),
]

man_pages = [
    (master_doc, 'posetrack', 'posetrack Documentation',
     [author], 1)
]

# -- Extension configuration -------------------------------------------------

intersphinx_mapping = {'python': ('https://docs.python.org/3', None),
                       'numpy': ('https://numpy.org/doc/stable', None)}
