"""Tools for bootstrapping NLU training data in a new language.

The package covers the full desk-scale loop: translate an annotated source
corpus with a phrase-based decoder (or load translations from disk), project
slot/intent annotations across the word alignments, filter the result by
translation round-trip consistency and by translation score, post-process
slot values against catalogs, train a slot tagger and an intent classifier,
and score the models with semantic error rate.
"""

__version__ = "0.1.0"
