"""
Hosting capacity and the tap-operation weight
=============================================

Raise PV penetration in 25 % steps until the first over-voltage, once with
the local controller and once with the optimizer. Then vary the weight on
tap operations and watch the trade-off. Takes a few minutes.
"""

from tapopt.sim import Scenario
from tapopt.sim.studies import hosting_capacity_sweep, weight_sweep

day = Scenario(feeder="feeder40", weather="clear", start_hour=8, stop_hour=17)
host = hosting_capacity_sweep(day, [50, 75, 100, 125, 150], controllers=("atc", "otc-full"))
for row in host.rows():
    print("pen {:>5.0f}%  ATC viol={} max {:.4f}   OTC viol={} max {:.4f}".format(*row))
print("first over-voltage: ATC", host.threshold("atc"), "% / OTC", host.threshold("otc-full"), "%")
print("hosting ratio:", host.ratio())

# the weight sweep: w2 = 0 chases every millivolt, larger w2 holds the taps
window = Scenario(feeder="feeder40", penetration=150, weather="partly_cloudy", start_hour=10, stop_hour=15)
for r in weight_sweep(window, [0.0, 0.005, 0.01]):
    print(f"w2={r['w2']:<6g} TOs={r['total_to']:4d}  max V {r['max_v']:.4f}  min V {r['min_v']:.4f}")
