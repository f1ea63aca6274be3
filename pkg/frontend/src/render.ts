/** Server-side SVG rendering via echarts SSR; no DOM required. */

import { writeFileSync } from "fs";
import * as echarts from "echarts";
import type { EChartsOption } from "echarts";

export class OutputError extends Error {}

export function renderSvg(option: EChartsOption, width = 900, height = 560): string {
  const chart = echarts.init(null, null, {
    renderer: "svg",
    ssr: true,
    width,
    height,
  });
  chart.setOption(option);
  const svg = chart.renderToSVGString();
  chart.dispose();
  return svg;
}

export function writeImage(option: EChartsOption, outPath: string): void {
  if (!outPath.endsWith(".svg")) {
    throw new OutputError(
      `unsupported output extension for '${outPath}' (vector .svg is supported)`,
    );
  }
  const svg = renderSvg(option);
  try {
    writeFileSync(outPath, svg, "utf-8");
  } catch (err) {
    throw new OutputError(`cannot write ${outPath}: ${(err as Error).message}`);
  }
}
