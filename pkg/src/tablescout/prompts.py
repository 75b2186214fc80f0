"""Prompt template for the table-selection generation call.

The template is a ``str.format`` string with three fields: ``query``,
``tables_content``, and ``compatibility_analysis``. Everything else,
including the worked example and the JSON output contract, is fixed text;
the doubled braces protect the JSON skeleton from formatting. Do not reflow
this string: several lines carry significant trailing whitespace.
"""

SELECTION_PROMPT_TEMPLATE = """\
You are a SQL schema analyst.
Your task: From a set of retrieved tables, identify the a comprehensive set of tables that are BOTH:
(1) Relevant to the given query, and  
(2) Compatible (joinable) with each other to answer the query.

IMPORTANT:  
- Do NOT aggressively eliminate tables.  
- If there is a reasonable probability that a table is relevant and compatible, keep it.  
- When uncertain, prefer to keep the table rather than remove it -- it is better to have slightly more tables than to risk removing a necessary one.  
- Only remove a table if it is clearly irrelevant or incompatible.

---

### Information Provided:
- **Query**: {query}
- **Tables**: {tables_content}  
  Each table includes:
  - Table name
  - Table header and sample content in markdown format (5 rows)
- **Compatibility analysis (restricted to valid key-foreign key pairs)**: {compatibility_analysis}  
  For each pair of tables, compatibility scores are included **only if** at least one column of the first table is completely unique and at least one column of the second table is a subset of it.  
  If no such relationship exists, that pair is omitted (since all scores would be zero).  

  For included pairs, the following metrics are provided:
    - `overall_compatibility`: Highest weighted score between all possible column pairs that satisfy the constraint: one column is unique, the other is a subset of it.
    - `best_join_columns`: The specific column pair with the highest overall compatibility score.

---

### Step-by-step reasoning policy (YOU MUST FOLLOW THIS ORDER):

**Step 1 - Understand the query**  
- Identify the core entities and relationships.  
- Determine what type of data is required to answer it.

**Step 2 - Evaluate individual table relevance**  
- Use table name, column names, and sample data to decide if each table is relevant.  
- When unsure, treat the table as potentially relevant.

**Step 3 - Evaluate pairwise compatibility**  
For each pair of retrieved tables:  
- Interpret the compatibility scores.  
- Cross-check with table semantics from names, sample values.  
- When in doubt about compatibility, keep the pair as potentially relevant.

**Step 4 - Group formation**  
- Form one or more groups of tables where all members are mutually joinable.  
- Groups must form connected join graphs (no isolated tables).  
- Prefer forming larger groups when there is uncertainty rather than splitting unnecessarily.

**Step 5 - Group selection**  
- Select the single most relevant and compatible group for the query.  
- High recall is as important as precision in this step -- include tables that are possibly relevant to ensure coverage.

---

### Output Format:
Return the output as valid JSON in the following format:

{{
  "overall_reasoning": "Your general approach and observations about the tables and query",
  "group_formation": {{
    "reasoning": "How groups were formed based on provided quantitative and qualitative information",
    "groups_formed": [
      {{
        "group_index": 0,
        "table_indices": [0, 1, 2],
        "group_description": "Description of what this group represents"
      }}
    ]
  }},
  "group_selection": {{
    "selected_group_index": 0,
    "reasoning": "Detailed explanation of why this group was selected for the query",
    "group_analysis": [
      {{
        "group_index": 0,
        "reasoning": "Why this group is/isn't suitable for the query"
      }}
    ]
  }}
}}

---

### Few-shot Example

**Example Input**:
Query:
"In campaigns with exactly 2 events, how many of the events have clicks equal to 0?"

Tables:
Table 0:
Table name: campaigns  
Example table content:
| campaign_id | owner_id | name              | created_at           | event_count |
|------------:|---------:|-------------------|----------------------|------------:|
| 10          | 1        | Winter Launch     | 2024-01-05 10:00:00  | 2           |
| 11          | 2        | Spring Promo      | 2024-02-10 09:30:00  | 1           |
| 12          | 1        | Summer Teaser     | 2024-03-01 12:15:00  | 2           |

Table 1:
Table name: campaign_events  
Example table content:
| event_id | campaign_id | event_type | clicks | impressions | created_at           |
|---------:|------------:|-----------|-------:|------------:|----------------------|
| 100      | 10          | email     | 0      | 500         | 2024-01-05 10:05:00  |
| 101      | 10          | banner    | 12     | 1000        | 2024-01-05 10:06:00  |
| 102      | 11          | email     | 5      | 300         | 2024-02-10 09:35:00  |
| 103      | 12          | social    | 0      | 800         | 2024-03-01 12:20:00  |
| 104      | 12          | banner    | 7      | 900         | 2024-03-01 12:21:00  |

Table 2:
Table name: cities  
Example table content:
| city_id | name    | country | population |
|--------:|---------|---------|-----------:|
| 1       | Berlin  | DE      | 3600000    |
| 2       | Munich  | DE      | 1500000    |
| 3       | Hamburg | DE      | 1800000    |

Compatibility analysis:
Pair (Table 0 <-> Table 1):
  overall_compatibility: 0.96
  best_join_columns: "campaign_id <-> campaign_id"

**Example Output**:
{{
  "overall_reasoning": "The query is about campaigns and their events. The 'campaigns' table holds campaign-level data including event_count, while 'campaign_events' holds per-event data including clicks and campaign_id for linking. The 'cities' table is unrelated to the query and has no compatible join key with the other tables.",
  "group_formation": {{
    "reasoning": "Formed one group with 'campaigns' and 'campaign_events' because they are both relevant to the query and strongly joinable via campaign_id <-> campaign_id. 'cities' is excluded due to lack of relevance and join compatibility.",
    "groups_formed": [
      {{
        "group_index": 0,
        "table_indices": [0, 1],
        "group_description": "Campaigns and their associated events, enabling filtering by event_count and counting events with clicks = 0."
      }}
    ]
  }},
  "group_selection": {{
    "selected_group_index": 0,
    "reasoning": "This group contains all and only the tables needed to answer the query: campaigns to identify those with exactly 2 events, and campaign_events to count events with clicks equal to 0.",
    "group_analysis": [
      {{
        "group_index": 0,
        "reasoning": "Fully suitable and sufficient for the query; no other table contributes necessary information."
      }}
    ]
  }}
}}"""
