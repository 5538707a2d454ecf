"""oconsent: transparent, auditable consent lifecycle tooling.

Subpackages are organized by concern:

- identity: actors, RSA-4096 keys, detached signatures, surrogate ids
- consent: agreement/proof documents, lifecycle machine, version lineage
- timestamp: trusted-timestamp providers (TSA sim, randomness beacons, nTime)
- sidechain: consent ledger with native contracts, fork choice, exits
- fingerprint: Merkle batching and public-chain anchoring of proofs
- ngac: attribute-based policy graph and access decisions
- statestore: invalidation-first consent state cache
- flow: platform orchestration (creation, access, revocation, audit)
- cli: `oconsent` command line
"""

__version__ = "0.1.0"
