import argparse
import glob
import os

import pandas as pd
from plotnine import ggplot, aes, geom_line, geom_point, geom_tile, \
    labs, scale_y_log10, theme, element_text


def plot_timeseries(df, out):
    long = df.melt(id_vars='t', value_vars=['min_x1', 'max_speed'], var_name='quantity', value_name='value')
    myPlot = (
            ggplot(long)
            + aes(x='t', y='value', color='quantity')
            + geom_line()
            + labs(x='Time', y='Value', color='Quantity')
            + theme(text=element_text(size=16))
    )
    myPlot.save(out, dpi=600)


def plot_tail(df, out):
    myPlot = (
            ggplot(df)
            + aes(x='v')
            + geom_point(aes(y='log_density'))
            + geom_line(aes(y='envelope'), color='red')
            + labs(x='Speed', y='log(count / v^2)')
            + theme(text=element_text(size=16))
    )
    myPlot.save(out, dpi=600)


def plot_ladder(df, out):
    myPlot = (
            ggplot(df)
            + aes(x='level', y='avg_field')
            + geom_line()
            + geom_point()
            + scale_y_log10()
            + labs(x='Level', y='Max windowed |E|')
            + theme(text=element_text(size=16))
    )
    myPlot.save(out, dpi=600)


def plot_frontier(df, out):
    df = df.assign(mu=df['mu'].astype(str), tau=df['tau'].astype(str))
    myPlot = (
            ggplot(df)
            + aes(x='tau', y='mu', fill='confined_fraction')
            + geom_tile()
            + labs(x='tau', y='mu', fill='Confined')
            + theme(text=element_text(size=16))
    )
    myPlot.save(out, dpi=600)


PLOTTERS = {'timeseries': plot_timeseries, 'tail': plot_tail, 'ladder': plot_ladder, 'frontier': plot_frontier}


def main():
    parser = argparse.ArgumentParser(description='Render the plot data written by "src/main.py plot" to PDF')
    parser.add_argument('--run_dir', default='./runs', help='Path of the runs')
    args = parser.parse_args()

    for file in glob.glob(args.run_dir + '/*/plots/*.csv'):
        kind = os.path.splitext(os.path.basename(file))[0]
        if kind not in PLOTTERS:
            continue
        out = os.path.splitext(file)[0] + '.pdf'
        PLOTTERS[kind](pd.read_csv(file), out)
        print(f'{file} -> {out}')


if __name__ == '__main__':
    main()
