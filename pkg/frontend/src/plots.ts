/**
 * Chart-option builders. Each returns a plain echarts option whose series
 * data comes verbatim from the CSVs, so tests can compare the plotted values
 * against the files without rendering anything.
 */

import type { EChartsOption, SeriesOption } from "echarts";

import {
  LabeledInput,
  disambiguate,
  readMetrics,
  readSpectrum,
  readSweep,
} from "./csv.js";

export function accuracyCurvesOption(inputs: LabeledInput[]): EChartsOption {
  const labeled = disambiguate(inputs);
  const series: SeriesOption[] = labeled.map(({ path, label }) => ({
    name: label,
    type: "line",
    showSymbol: false,
    data: readMetrics(path).map((r) => [r.round, r.accuracy]),
  }));
  return {
    animation: false,
    title: { text: "Global test accuracy by round" },
    legend: { data: labeled.map((l) => l.label), bottom: 0 },
    xAxis: { type: "value", name: "round" },
    yAxis: { type: "value", name: "accuracy", min: 0, max: 1 },
    series,
  };
}

export function spectrumOption(inputs: LabeledInput[]): EChartsOption {
  const labeled = disambiguate(inputs);
  const series: SeriesOption[] = [];
  for (const { path, label } of labeled) {
    const rows = readSpectrum(path);
    const byRun = new Map<string, [number, number][]>();
    for (const r of rows) {
      const key = labeled.length > 1 ? `${label}:${r.runLabel}` : r.runLabel;
      if (!byRun.has(key)) byRun.set(key, []);
      byRun.get(key)!.push([r.rank, r.sigmaNormalized]);
    }
    for (const [name, data] of byRun) {
      series.push({ name, type: "line", data });
    }
  }
  return {
    animation: false,
    title: { text: "Classifier singular values (normalized)" },
    legend: { data: series.map((s) => s.name as string), bottom: 0 },
    xAxis: { type: "value", name: "rank" },
    yAxis: { type: "log", name: "sigma / sigma_max" },
    series,
  };
}

export function sweepBarsOption(inputs: LabeledInput[]): EChartsOption {
  const labeled = disambiguate(inputs);
  const valueOrder: string[] = [];
  const series: SeriesOption[] = [];
  let axisName = "value";
  for (const { path, label } of labeled) {
    const rows = readSweep(path);
    axisName = rows[0].axis;
    const byValue = new Map<string, number[]>();
    for (const r of rows) {
      if (!byValue.has(r.value)) byValue.set(r.value, []);
      byValue.get(r.value)!.push(r.finalAccuracy);
    }
    for (const v of byValue.keys()) {
      if (!valueOrder.includes(v)) valueOrder.push(v);
    }
    const means: (number | null)[] = [];
    const whiskers: [number, number, number][] = []; // [index, low, high]
    valueOrder.forEach((v, i) => {
      const accs = byValue.get(v);
      if (!accs) {
        means.push(null);
        return;
      }
      const mean = accs.reduce((a, b) => a + b, 0) / accs.length;
      const std = Math.sqrt(
        accs.reduce((a, b) => a + (b - mean) ** 2, 0) / accs.length,
      );
      means.push(mean);
      whiskers.push([i, mean - std, mean + std]);
    });
    series.push({ name: label, type: "bar", data: means });
    series.push({
      name: `${label} ±std`,
      type: "custom",
      renderItem: whiskerRenderer,
      data: whiskers,
      z: 10,
    } as SeriesOption);
  }
  return {
    animation: false,
    title: { text: "Final accuracy by sweep value (mean ± std)" },
    legend: { data: labeled.map((l) => l.label), bottom: 0 },
    xAxis: { type: "category", name: axisName, data: valueOrder },
    yAxis: { type: "value", name: "final accuracy" },
    series,
  };
}

// error-bar whiskers as a custom series: vertical line plus caps
function whiskerRenderer(params: any, api: any) {
  const x = api.coord([api.value(0), 0])[0];
  const low = api.coord([0, api.value(1)])[1];
  const high = api.coord([0, api.value(2)])[1];
  const style = { stroke: "#333", fill: undefined as unknown as string, lineWidth: 1 };
  const cap = 4;
  return {
    type: "group",
    children: [
      { type: "line", shape: { x1: x, y1: low, x2: x, y2: high }, style },
      { type: "line", shape: { x1: x - cap, y1: low, x2: x + cap, y2: low }, style },
      { type: "line", shape: { x1: x - cap, y1: high, x2: x + cap, y2: high }, style },
    ],
  };
}
