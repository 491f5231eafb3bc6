"""Cultural context pipeline for conversations: elicit social-norm
descriptions, organize them into human-validated norm concepts, ground
conversations in those concepts, verify the results, and export the enriched
schema graph."""

__version__ = "0.1.0"
