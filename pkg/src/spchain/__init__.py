"""Sharded blockchain simulator with concurrent voting, leader rotation and batched cross-shard proofs."""

__version__ = "0.1.0"
