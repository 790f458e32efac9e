"""
Belief distributions and surprise
=================================

A belief is a set of short textual hypotheses. A model scores each one with a
negative log-likelihood, and a softmax over those scores gives a distribution.
Surprise is how far that distribution moves once a new frame is seen.
"""
import math

import numpy as np

from beliefshift.belief import distribution_from_nll, jsd, kl_divergence, surprise

# NLLs of three hypotheses before the new frame arrives
prior_nlls = [math.log(2), math.log(4), math.log(4)]
print("prior  ", distribution_from_nll(prior_nlls))

# after the frame, the third hypothesis suddenly looks likely
post_nlls = [3.0, 4.0, 0.2]
print("post   ", distribution_from_nll(post_nlls).round(4))

# KL(post || prior) in nats, and the bounded base-2 Jensen-Shannon alternative
print("KL     ", round(surprise(prior_nlls, post_nlls, mode="kl").value, 4))
print("JSD    ", round(surprise(prior_nlls, post_nlls, mode="jsd").value, 4))

# temperature: small tau sharpens beliefs, large tau flattens them
for tau in (0.25, 1.0, 4.0):
    print(f"tau={tau:<5}", distribution_from_nll(post_nlls, tau).round(3))

# no update means no surprise, whatever the NLLs are
assert surprise(post_nlls, post_nlls).value == 0.0

# KL is asymmetric, JSD is not
p, q = np.array([0.9, 0.1]), np.array([0.5, 0.5])
print("KL(p||q) =", round(kl_divergence(p, q), 4), " KL(q||p) =", round(kl_divergence(q, p), 4))
print("JSD(p,q) =", round(jsd(p, q), 4), " JSD(q,p) =", round(jsd(q, p), 4))
