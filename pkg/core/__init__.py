# Core: geometry, packings, hard instances, protocol, adversary, learners
