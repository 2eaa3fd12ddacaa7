"""Default in-context exemplars for few-shot drafting.

Two hand-picked (description, code) pairs in the style of the benchmark
training splits; they are prompt text only and are never executed.
"""

_BAR_DESCRIPTION = """\
This vertical bar chart displays the annual rainfall received by five major \
cities. The chart compares precipitation levels, providing an at-a-glance view \
of which urban areas are wettest over the course of a year.

The X-axis lists the cities, labeled as 'City', while the Y-axis shows the \
total annual rainfall in millimetres, denoted as 'Annual Rainfall (mm)'.

The data for this graph is stored in a CSV file named 'city_rainfall.csv', \
which includes two columns: 'City', 'Annual Rainfall (mm)'. Here are the first \
six rows of the dataset:

City,Annual Rainfall (mm)
Singapore,2340
Mumbai,2213
Tokyo,1528
London,621
Cairo,25
"""

_BAR_CODE = """\
import matplotlib.pyplot as plt
import pandas as pd
import numpy as np

df = pd.read_csv('city_rainfall.csv')

plt.figure(figsize=(8, 6))
plt.bar(df['City'], df['Annual Rainfall (mm)'], color='steelblue')
plt.xlabel('City')
plt.ylabel('Annual Rainfall (mm)')
plt.title('Annual Rainfall by City')
plt.tight_layout()
plt.show()
"""

_SCATTER_DESCRIPTION = """\
This scatter plot explores the relationship between daily average temperature \
and ice cream sales at a seaside kiosk. Each point represents one day of the \
summer season, revealing how warmer weather drives demand.

The X-axis denotes the daily average temperature in degrees Celsius, labeled \
'Temperature (C)', and the Y-axis denotes the number of ice creams sold that \
day, labeled 'Ice Creams Sold'.

The data for this graph is stored in a CSV file named 'kiosk_sales.csv', which \
includes two columns: 'Temperature (C)', 'Ice Creams Sold'. Here are the first \
six rows of the dataset:

Temperature (C),Ice Creams Sold
18.2,115
21.5,162
24.9,210
27.3,254
30.1,302
"""

_SCATTER_CODE = """\
import matplotlib.pyplot as plt
import pandas as pd
import numpy as np

df = pd.read_csv('kiosk_sales.csv')

plt.figure(figsize=(8, 6))
plt.scatter(df['Temperature (C)'], df['Ice Creams Sold'], color='darkorange', alpha=0.8)
plt.xlabel('Temperature (C)')
plt.ylabel('Ice Creams Sold')
plt.title('Ice Cream Sales vs Temperature')
plt.grid(True, linestyle='--', alpha=0.4)
plt.tight_layout()
plt.show()
"""

DEFAULT_EXEMPLARS: tuple[tuple[str, str], ...] = (
    (_BAR_DESCRIPTION, _BAR_CODE),
    (_SCATTER_DESCRIPTION, _SCATTER_CODE),
)
