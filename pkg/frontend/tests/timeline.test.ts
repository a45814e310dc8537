import { describe, expect, it } from "vitest";
import { layoutTimeline } from "../src/timeline.js";
import { RouteDoc } from "../src/types.js";

// Stops as a booked afternoon might stream them: two shared routes.
const ROUTES: RouteDoc[] = [
  {
    stops: [
      { trip: 1, kind: "pickup", location: 3, arrival: 36100 },
      { trip: 2, kind: "pickup", location: 5, arrival: 36900 },
      { trip: 1, kind: "dropoff", location: 4, arrival: 38200 },
      { trip: 2, kind: "dropoff", location: 6, arrival: 39100 },
    ],
  },
  {
    stops: [
      { trip: 3, kind: "pickup", location: 7, arrival: 41500 },
      { trip: 3, kind: "dropoff", location: 8, arrival: 43400 },
    ],
  },
];

describe("timeline layout", () => {
  it("lays out one lane per route on a 15 minute grid", () => {
    const layout = layoutTimeline(ROUTES);
    expect(layout).toEqual({
      startCol: 40,
      cols: 9,
      ticks: [
        { col: 0, label: "10:00" },
        { col: 4, label: "11:00" },
        { col: 8, label: "12:00" },
      ],
      lanes: [
        {
          startCol: 0,
          endCol: 3,
          blocks: [
            { trip: 1, kind: "pickup", col: 0, arrival: 36100 },
            { trip: 2, kind: "pickup", col: 1, arrival: 36900 },
            { trip: 1, kind: "dropoff", col: 2, arrival: 38200 },
            { trip: 2, kind: "dropoff", col: 3, arrival: 39100 },
          ],
        },
        {
          startCol: 6,
          endCol: 8,
          blocks: [
            { trip: 3, kind: "pickup", col: 6, arrival: 41500 },
            { trip: 3, kind: "dropoff", col: 8, arrival: 43400 },
          ],
        },
      ],
    });
  });

  it("returns an empty layout for no routes or all-empty routes", () => {
    expect(layoutTimeline([])).toEqual({ lanes: [], startCol: 0, cols: 0, ticks: [] });
    expect(layoutTimeline([{ stops: [] }])).toEqual({
      lanes: [],
      startCol: 0,
      cols: 0,
      ticks: [],
    });
  });

  it("keeps a lane for an empty route next to booked ones", () => {
    const layout = layoutTimeline([ROUTES[1], { stops: [] }]);
    expect(layout.lanes).toHaveLength(2);
    expect(layout.lanes[1]).toEqual({ blocks: [], startCol: 0, endCol: 0 });
  });

  it("is a pure function of the latest snapshot", () => {
    const sequence = [
      [ROUTES[0]],
      [ROUTES[0], { stops: ROUTES[1].stops.slice(0, 1) }],
      ROUTES,
    ];
    const replay = () => sequence.map((routes) => layoutTimeline(routes)).pop();
    expect(replay()).toEqual(replay());
    expect(replay()).toEqual(layoutTimeline(ROUTES));
  });
});
