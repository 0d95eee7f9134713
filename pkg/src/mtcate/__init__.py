"""CATE estimation with partially missing treatment labels.

Library layout:
  autodiff / nn   minimal dense-network engine (reverse mode, Adam)
  data            synthetic generator, missingness mechanism, CSV round trip
  mtrnet          the adversarially balanced representation network
  baselines       per-arm OLS, TARNet, CFR-MMD x {delete, impute, reweight}
  metrics         PEHE variants, policy risk, domain-split reports
  theory          exact identity/bound checks on finite discrete worlds
  harness / cli   seeded experiment orchestration
"""

__version__ = "0.1.0"
