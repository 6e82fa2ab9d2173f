# ---
# jupyter:
#   jupytext:
#     formats: ipynb,py:light
#     text_representation:
#       extension: .py
#       format_name: light
#       format_version: '1.5'
#       jupytext_version: 1.11.4
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# Where does the communication go? Each model is compiled once and costed under several frameworks.

# +
import numpy as np
import pandas as pd

from costpy.params import SecurityParams
from costpy.profile import ProfileRequest, run_profile
from costpy.report import compare_frameworks, group_report
# -

# ## Linear vs. non-linear layers
#
# Share (%) of the online bits per operator for one inference.

# +
MODEL = 'resnet18'
FRAMEWORKS = ['ABY', 'ABY3', 'Falcon', 'CrypTFlow2', 'Cheetah']

reports = run_profile(ProfileRequest(FRAMEWORKS, MODEL, workers=4))
shares = compare_frameworks(reports)
shares.round(2)
# -

LINEAR = ['conv2d', 'linear', 'batchnorm', 'avgpool2d']
pd.DataFrame({
    'linear': shares.reindex(LINEAR).fillna(0).sum(),
    'non-linear': 100 - shares.reindex(LINEAR).fillna(0).sum(),
})

# Total online GB and rounds.

pd.DataFrame(
    {r.framework: [r.total().online_bits / 8e9, r.total().online_rounds]
     for r in reports},
    index=['online GB', 'online rounds']
).T

# ## Training: forward, backward and optimizer step

# +
train = {
    kind: run_profile(ProfileRequest(
        ['ABY3', 'ABY'], 'lenet', mode='train', optimizer={'kind': kind}
    ))
    for kind in ('SGD', 'Adam')
}
rows = {}
for kind, kind_reports in train.items():
    for report in kind_reports:
        fb = group_report(report, 'fb', 'online')['online_bits']
        rows[(kind, report.framework)] = fb / fb.sum() * 100
pd.DataFrame(rows).T.round(2)
# -

# ## Ring size sweep

# +
points = [(32, 8), (64, 16), (128, 32)]
totals = np.array([
    [
        r.total().online_bits
        for r in run_profile(ProfileRequest(
            ['ABY3', 'Falcon'], 'lenet', params=SecurityParams(k=k, f=f)
        ))
    ]
    for k, f in points
])
pd.DataFrame(totals / totals[1], index=[k for k, _ in points],
             columns=['ABY3', 'Falcon'])
