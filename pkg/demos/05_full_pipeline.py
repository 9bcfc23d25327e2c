"""End-to-end defense over a short clip containing one patched frame, then a globally perturbed one."""
from vlmguard import PipelineConfig, ToyDualEncoder, Vocabulary, defend
from vlmguard.harness.fixtures import make_suite

suite = make_suite(2, 2, 2, seed=4)
clean, glob, patch = suite[0].image, suite[2].image, suite[4].image
cfg = PipelineConfig().replace(t_s=5e-5, t_cc1=0.65, t_cc2=0.32)
enc = ToyDualEncoder()
vocab = Vocabulary.synthetic(dim=enc.dim)

out = defend([clean, patch, clean], "is there a pedestrian crossing the road", cfg, enc, vocab)
print(f"clip: {out.verdict.cls.value}, representative frame {out.representative}, "
      f"{len(out.purified_frames)} frames masked")

out = defend([glob], "what color is the traffic light ahead", cfg, enc, vocab)
print(out.to_text(), end="")
print("final prompt:", out.final_prompt)
