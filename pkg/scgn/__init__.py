"""Middle-view synthesis from two side views.

Import the module you need: ``scgn.core`` holds the networks, losses,
training loop and metrics, ``scgn.pipeline`` the triplet datasets.
"""
