"""Tune a prompt embedding toward augmented views of a perturbed frame, then read off a suffix."""
from vlmguard import EaptConfig, Projector, ToyDualEncoder, Vocabulary, run_eapt, semantic_verification
from vlmguard.harness.fixtures import make_eapt_fixtures

enc = ToyDualEncoder()
vocab = Vocabulary.synthetic(dim=enc.dim)
proj = Projector.identity(enc.dim)

fx = make_eapt_fixtures(1)[0]
print("prompt:", fx.prompt)
print(f"V_sem = {semantic_verification(fx.image, fx.prompt, enc):.3f}")

robust, trace = run_eapt(fx.image, fx.prompt, enc, proj, vocab, EaptConfig(K=10, eta=0.02))
print(trace.to_csv(), end="")
print("robust prompt:", robust.composed)
